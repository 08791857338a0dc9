#include <gtest/gtest.h>
#include <zlib.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>

#include "cranioclip/nifti.hpp"
#include "cranioclip/volume.hpp"

using namespace cranioclip;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  auto d = fs::temp_directory_path() / ("cranioclip_io_" + std::to_string(::getpid()));
  fs::create_directories(d);
  return d;
}

// Hand-assembled NIfTI-1 single-file image; independent of the library encoder.
struct RawNifti {
  std::int16_t datatype = 16;
  std::int16_t dims[3] = {3, 2, 2};
  float slope = 0.0f, inter = 0.0f;
  bool big_endian = false;
  int sizeof_hdr = 348;
  const char* magic = "n+1";
  std::int16_t ndim = 3;
  std::int16_t dim4 = 1;

  template <typename V>
  void put(std::vector<std::uint8_t>& b, std::size_t off, V v) const {
    std::uint8_t tmp[sizeof(V)];
    std::memcpy(tmp, &v, sizeof(V));
    if (big_endian) std::reverse(tmp, tmp + sizeof(V));
    std::memcpy(&b[off], tmp, sizeof(V));
  }

  template <typename V>
  std::vector<std::uint8_t> bytes(const std::vector<V>& voxels) const {
    std::vector<std::uint8_t> b(352 + voxels.size() * sizeof(V), 0);
    put<std::int32_t>(b, 0, sizeof_hdr);
    put<std::int16_t>(b, 40, ndim);
    for (int i = 0; i < 3; ++i) put<std::int16_t>(b, 42 + 2 * i, dims[i]);
    put<std::int16_t>(b, 48, dim4);
    put<std::int16_t>(b, 50, 1);
    put<std::int16_t>(b, 52, 1);
    put<std::int16_t>(b, 54, 1);
    put<std::int16_t>(b, 70, datatype);
    put<std::int16_t>(b, 72, static_cast<std::int16_t>(8 * sizeof(V)));
    put<float>(b, 80, 1.5f);
    put<float>(b, 84, 2.0f);
    put<float>(b, 88, 2.5f);
    put<float>(b, 108, 352.0f);
    put<float>(b, 112, slope);
    put<float>(b, 116, inter);
    std::memcpy(&b[344], magic, 4);
    for (std::size_t i = 0; i < voxels.size(); ++i) put<V>(b, 352 + i * sizeof(V), voxels[i]);
    return b;
  }
};

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), b.size());
}

void write_gz(const fs::path& p, const std::vector<std::uint8_t>& b) {
  gzFile f = gzopen(p.string().c_str(), "wb");
  gzwrite(f, b.data(), static_cast<unsigned>(b.size()));
  gzclose(f);
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no exception";
  return ErrorCode::Io;
}

}  // namespace

TEST(Grid, XFastestLayout) {
  Grid3<int> g({3, 4, 5});
  EXPECT_EQ(g.index(1, 2, 3), 1u + 3u * (2u + 4u * 3u));
  g(2, 3, 4) = 7;
  EXPECT_EQ(g.data().back(), 7);
  EXPECT_THROW(Grid3<int>({0, 1, 1}), Error);
}

TEST(Nifti, ReadsHandBuiltLittleEndianFloat) {
  const auto dir = temp_dir();
  std::vector<float> vox(12);
  for (int i = 0; i < 12; ++i) vox[i] = 0.25f * float(i) - 1.0f;
  RawNifti raw;
  write_bytes(dir / "le.nii", raw.bytes(vox));
  const auto v = nifti::read_nifti(dir / "le.nii");
  EXPECT_EQ(v.dims(), (Dims3{3, 2, 2}));
  EXPECT_EQ(v.data(), vox);
  EXPECT_FLOAT_EQ(v.spacing[0], 1.5f);
  EXPECT_FLOAT_EQ(v.spacing[2], 2.5f);
  EXPECT_FLOAT_EQ(v(2, 1, 1), vox[11]);
}

TEST(Nifti, ReadsBigEndianAndGzip) {
  const auto dir = temp_dir();
  std::vector<std::int16_t> vox{-5, 0, 1, 2, 300, -300, 7, 8, 9, 10, 11, 12};
  RawNifti raw;
  raw.datatype = 4;
  raw.big_endian = true;
  write_gz(dir / "be.nii.gz", raw.bytes(vox));
  const auto v = nifti::read_nifti(dir / "be.nii.gz");
  for (std::size_t i = 0; i < vox.size(); ++i) EXPECT_EQ(v.data()[i], float(vox[i]));
  EXPECT_EQ(v.datatype_code, 4);
}

TEST(Nifti, AppliesSlopeAndIntercept) {
  const auto dir = temp_dir();
  std::vector<std::uint8_t> vox{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
  RawNifti raw;
  raw.datatype = 2;
  raw.slope = 0.5f;
  raw.inter = -1.0f;
  write_bytes(dir / "scaled.nii", raw.bytes(vox));
  const auto v = nifti::read_nifti(dir / "scaled.nii");
  for (std::size_t i = 0; i < vox.size(); ++i) EXPECT_FLOAT_EQ(v.data()[i], 0.5f * vox[i] - 1.0f);
  // Rewriting keeps the scaled values.
  nifti::write_nifti(v, dir / "rescaled.nii");
  EXPECT_EQ(nifti::read_nifti(dir / "rescaled.nii").data(), v.data());
}

TEST(Nifti, ZeroSlopeMeansUnscaled) {
  const auto dir = temp_dir();
  std::vector<std::int32_t> vox{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  RawNifti raw;
  raw.datatype = 8;
  raw.slope = 0.0f;
  raw.inter = 100.0f;
  write_bytes(dir / "noscale.nii", raw.bytes(vox));
  const auto v = nifti::read_nifti(dir / "noscale.nii");
  EXPECT_EQ(v.data()[3], 4.0f);
}

TEST(Nifti, DistinctErrors) {
  const auto dir = temp_dir();
  std::vector<float> vox(12, 1.0f);
  RawNifti bad_size;
  bad_size.sizeof_hdr = 350;
  write_bytes(dir / "bad_size.nii", bad_size.bytes(vox));
  EXPECT_EQ(code_of([&] { nifti::read_nifti(dir / "bad_size.nii"); }), ErrorCode::MalformedHeader);

  RawNifti bad_magic;
  bad_magic.magic = "xyz";
  write_bytes(dir / "bad_magic.nii", bad_magic.bytes(vox));
  EXPECT_EQ(code_of([&] { nifti::read_nifti(dir / "bad_magic.nii"); }), ErrorCode::MalformedHeader);

  RawNifti four_d;
  four_d.ndim = 4;
  four_d.dim4 = 2;
  write_bytes(dir / "four_d.nii", four_d.bytes(vox));
  EXPECT_EQ(code_of([&] { nifti::read_nifti(dir / "four_d.nii"); }), ErrorCode::MalformedHeader);

  RawNifti rgb;
  rgb.datatype = 128;
  write_bytes(dir / "rgb.nii", rgb.bytes(vox));
  EXPECT_EQ(code_of([&] { nifti::read_nifti(dir / "rgb.nii"); }), ErrorCode::UnsupportedDatatype);

  RawNifti ok;
  auto bytes = ok.bytes(vox);
  bytes.resize(bytes.size() - 5);
  write_bytes(dir / "short.nii", bytes);
  EXPECT_EQ(code_of([&] { nifti::read_nifti(dir / "short.nii"); }), ErrorCode::TruncatedPayload);

  bytes.resize(100);
  write_bytes(dir / "tiny.nii", bytes);
  EXPECT_EQ(code_of([&] { nifti::read_nifti(dir / "tiny.nii"); }), ErrorCode::MalformedHeader);

  EXPECT_EQ(code_of([&] { nifti::read_nifti(dir / "missing.nii"); }), ErrorCode::Io);
  EXPECT_EQ(code_of([&] { nifti::write_nifti(Volume({2, 2, 2}), dir); }), ErrorCode::Io);
}

TEST(Nifti, RoundTripEveryDatatype) {
  const auto dir = temp_dir();
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> u(0.0f, 200.0f);
  for (std::int16_t code : {2, 4, 8, 16, 64}) {
    Volume v({5, 4, 3});
    for (auto& x : v.data()) x = u(rng);
    if (code != 16 && code != 64)
      for (auto& x : v.data()) x = std::round(x);
    v.datatype_code = code;
    v.spacing = {0.9f, 1.1f, 1.3f};
    for (const char* ext : {".nii", ".nii.gz"}) {
      const auto path = dir / ("rt" + std::to_string(code) + ext);
      nifti::write_nifti(v, path);
      const auto back = nifti::read_nifti(path);
      EXPECT_EQ(back.dims(), v.dims());
      EXPECT_EQ(back.data(), v.data()) << "datatype " << code << ext;
      EXPECT_EQ(back.spacing, v.spacing);
      EXPECT_EQ(back.datatype_code, code);
    }
  }
}

TEST(Nifti, IntegerWriteRoundsAndClamps) {
  const auto dir = temp_dir();
  Volume v({3, 1, 1}, std::vector<float>{1.6f, -3.0f, 400.0f});
  v.datatype_code = 2;
  nifti::write_nifti(v, dir / "u8.nii");
  const auto back = nifti::read_nifti(dir / "u8.nii");
  EXPECT_EQ(back.data(), (std::vector<float>{2.0f, 0.0f, 255.0f}));
}

TEST(Nifti, MaskBinarizesNonZero) {
  const auto dir = temp_dir();
  std::vector<float> vox{0, 0.5f, -2, 0, 3, 0, 0, 0, 1, 0, 0, 9};
  RawNifti raw;
  write_bytes(dir / "m.nii", raw.bytes(vox));
  const auto m = nifti::read_nifti_mask(dir / "m.nii");
  for (std::size_t i = 0; i < vox.size(); ++i) EXPECT_EQ(m.data()[i], vox[i] != 0 ? 1 : 0);
  nifti::write_nifti(m, dir / "m2.nii.gz");
  EXPECT_EQ(nifti::read_nifti_mask(dir / "m2.nii.gz").data(), m.data());
}

TEST(Nifti, PreservedHeaderFieldsSurviveRewrite) {
  const auto dir = temp_dir();
  std::vector<float> vox(12, 2.0f);
  RawNifti raw;
  auto bytes = raw.bytes(vox);
  std::memcpy(&bytes[148], "scanner-notes", 13);  // descrip
  write_bytes(dir / "d.nii", bytes);
  auto v = nifti::read_nifti(dir / "d.nii");
  nifti::write_nifti(v, dir / "d2.nii");
  const auto back = nifti::read_nifti(dir / "d2.nii");
  ASSERT_TRUE(back.header.has_value());
  EXPECT_EQ(std::memcmp(back.header->data() + 148, "scanner-notes", 13), 0);
}

TEST(Planes, LayoutMatchesDefinition) {
  Grid3<int> g({4, 5, 6});
  for (std::size_t z = 0; z < 6; ++z)
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 4; ++x) g(x, y, z) = int(100 * x + 10 * y + z);
  const auto sag = extract_plane(g, Axis::Sagittal, 2);  // rows z, cols y
  EXPECT_EQ(sag.rows(), 6u);
  EXPECT_EQ(sag.cols(), 5u);
  EXPECT_EQ(sag(4, 3), 200 + 30 + 4);
  const auto cor = extract_plane(g, Axis::Coronal, 1);  // rows z, cols x
  EXPECT_EQ(cor.rows(), 6u);
  EXPECT_EQ(cor.cols(), 4u);
  EXPECT_EQ(cor(5, 3), 300 + 10 + 5);
  const auto ax = extract_plane(g, Axis::Axial, 3);  // rows y, cols x
  EXPECT_EQ(ax.rows(), 5u);
  EXPECT_EQ(ax.cols(), 4u);
  EXPECT_EQ(ax(2, 1), 100 + 20 + 3);
}

TEST(Planes, InsertInvertsExtract) {
  Grid3<int> g({4, 5, 6});
  for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = int(i);
  for (Axis a : kAllAxes) {
    Grid3<int> h(g.dims(), -1);
    for (std::size_t k = 0; k < slice_count(g.dims(), a); ++k) insert_plane(h, a, k, extract_plane(g, a, k));
    EXPECT_EQ(h.data(), g.data());
  }
}

TEST(Planes, PadIsCenteredMultipleOf32AndCropInverts) {
  Grid2<float> s(45, 70);
  for (std::size_t i = 0; i < s.data().size(); ++i) s.data()[i] = float(i);
  const auto [p, pad] = pad_slice(s, -1.0f);
  EXPECT_EQ(p.rows(), 64u);
  EXPECT_EQ(p.cols(), 96u);
  EXPECT_EQ(pad.top, (64u - 45u) / 2);
  EXPECT_EQ(pad.left, (96u - 70u) / 2);
  EXPECT_EQ(p(0, 0), -1.0f);
  EXPECT_EQ(p(pad.top, pad.left), 0.0f);
  EXPECT_EQ(crop_slice(p, pad), s);
  Grid2<float> exact(64, 32, 1.0f);
  EXPECT_EQ(pad_slice(exact).first, exact);
}

TEST(Standardize, ZeroMeanUnitPopulationStd) {
  std::mt19937 rng(1);
  std::gamma_distribution<float> g(2.0f, 3.0f);
  Volume v({7, 6, 5});
  for (auto& x : v.data()) x = g(rng);
  const auto s = standardize(v);
  double m = 0, ss = 0;
  for (float x : s.data()) m += x;
  m /= double(s.size());
  for (float x : s.data()) ss += (x - m) * (x - m);
  EXPECT_NEAR(m, 0.0, 1e-6);
  EXPECT_NEAR(std::sqrt(ss / double(s.size())), 1.0, 1e-5);
  EXPECT_THROW(standardize(Volume({3, 3, 3}, 4.0f)), Error);
}

#pragma once

#include "cranioclip/augment.hpp"
#include "cranioclip/autodiff/adam.hpp"
#include "cranioclip/autodiff/checkpoint.hpp"
#include "cranioclip/autodiff/init.hpp"
#include "cranioclip/autodiff/layers.hpp"
#include "cranioclip/autodiff/parameters.hpp"
#include "cranioclip/autodiff/tensor.hpp"
#include "cranioclip/error.hpp"
#include "cranioclip/inference.hpp"
#include "cranioclip/metrics.hpp"
#include "cranioclip/morphology.hpp"
#include "cranioclip/nifti.hpp"
#include "cranioclip/phantom.hpp"
#include "cranioclip/run_config.hpp"
#include "cranioclip/runtime.hpp"
#include "cranioclip/trainer.hpp"
#include "cranioclip/unet.hpp"
#include "cranioclip/volume.hpp"

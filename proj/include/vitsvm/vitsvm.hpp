#pragma once

#include "vitsvm/autodiff.hpp"
#include "vitsvm/checkpoint.hpp"
#include "vitsvm/config.hpp"
#include "vitsvm/data.hpp"
#include "vitsvm/errors.hpp"
#include "vitsvm/gradcheck.hpp"
#include "vitsvm/heads.hpp"
#include "vitsvm/image_io.hpp"
#include "vitsvm/metrics.hpp"
#include "vitsvm/model.hpp"
#include "vitsvm/optimizer.hpp"
#include "vitsvm/rng.hpp"
#include "vitsvm/synth.hpp"
#include "vitsvm/tensor.hpp"
#include "vitsvm/trainer.hpp"
#include "vitsvm/vit.hpp"

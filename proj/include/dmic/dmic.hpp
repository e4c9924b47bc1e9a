#pragma once

#include "dmic/ablation.hpp"
#include "dmic/checkpoint.hpp"
#include "dmic/config.hpp"
#include "dmic/data.hpp"
#include "dmic/dcg.hpp"
#include "dmic/denoiser.hpp"
#include "dmic/metrics.hpp"
#include "dmic/objectives.hpp"
#include "dmic/sampler.hpp"
#include "dmic/schedule.hpp"
#include "dmic/training.hpp"
#include "dmic/viz.hpp"

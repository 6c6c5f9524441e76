// SPDX-License-Identifier: Apache-2.0
#pragma once

// Everything except the command-line front end.
#include "unisign/ablation.hpp"
#include "unisign/checkpoint.hpp"
#include "unisign/config.hpp"
#include "unisign/curation.hpp"
#include "unisign/data.hpp"
#include "unisign/encoders.hpp"
#include "unisign/language_head.hpp"
#include "unisign/metrics.hpp"
#include "unisign/model.hpp"
#include "unisign/pgf.hpp"
#include "unisign/pose_data.hpp"
#include "unisign/sampler.hpp"
#include "unisign/trainer.hpp"
#include "unisign/vision.hpp"

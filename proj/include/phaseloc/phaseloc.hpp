// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header.

#ifndef PHASELOC_PHASELOC_HPP
#define PHASELOC_PHASELOC_HPP

#include "baseline.hpp"
#include "calibration.hpp"
#include "channel.hpp"
#include "core.hpp"
#include "eval.hpp"
#include "likelihood.hpp"
#include "loess.hpp"
#include "phase_model.hpp"
#include "refine.hpp"
#include "rng.hpp"
#include "scene.hpp"

#endif // PHASELOC_PHASELOC_HPP

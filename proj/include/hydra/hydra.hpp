// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hydra/adapter.hpp"
#include "hydra/analysis.hpp"
#include "hydra/archive.hpp"
#include "hydra/baseline.hpp"
#include "hydra/errors.hpp"
#include "hydra/gradcheck.hpp"
#include "hydra/hydra_opt.hpp"
#include "hydra/numeric.hpp"
#include "hydra/synthetic.hpp"

// Umbrella header: the whole laboratory in one include.
#pragma once

#include "subcrit/branching.hpp"
#include "subcrit/config.hpp"
#include "subcrit/environment.hpp"
#include "subcrit/harness.hpp"
#include "subcrit/linalg.hpp"
#include "subcrit/parallel.hpp"
#include "subcrit/report.hpp"
#include "subcrit/rng.hpp"
#include "subcrit/spectral.hpp"
#include "subcrit/tilted_walk.hpp"
#include "subcrit/verify.hpp"

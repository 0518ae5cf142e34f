#pragma once

#include "hbsae/conditionals.hpp"
#include "hbsae/diagnostics.hpp"
#include "hbsae/domain.hpp"
#include "hbsae/engine.hpp"
#include "hbsae/error.hpp"
#include "hbsae/evaluation.hpp"
#include "hbsae/inference.hpp"
#include "hbsae/io.hpp"
#include "hbsae/random.hpp"
#include "hbsae/simulation.hpp"

namespace hbsae {
inline constexpr const char* kVersion = "0.1.0";
}

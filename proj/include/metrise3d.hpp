#pragma once

#include "metrise3d/jet.hpp"
#include "metrise3d/expr.hpp"
#include "metrise3d/tensor.hpp"
#include "metrise3d/projective.hpp"
#include "metrise3d/pencil.hpp"
#include "metrise3d/solver.hpp"
#include "metrise3d/cli.hpp"

#pragma once

#include "deepsolve/dataio.hpp"
#include "deepsolve/evaluator.hpp"
#include "deepsolve/mlp.hpp"
#include "deepsolve/netmodel.hpp"
#include "deepsolve/opf.hpp"
#include "deepsolve/powerflow.hpp"
#include "deepsolve/trainer.hpp"

#pragma once

#include "featgen/common.hpp"
#include "featgen/dataset.hpp"
#include "featgen/transform.hpp"
#include "featgen/clustering.hpp"
#include "featgen/nn.hpp"
#include "featgen/agents.hpp"
#include "featgen/metrics.hpp"
#include "featgen/forest.hpp"
#include "featgen/evaluator.hpp"
#include "featgen/selection.hpp"
#include "featgen/explain.hpp"
#include "featgen/orchestrator.hpp"

#pragma once

#include "tsarag/agents.hpp"
#include "tsarag/anomaly.hpp"
#include "tsarag/clustering.hpp"
#include "tsarag/core_data.hpp"
#include "tsarag/dataio.hpp"
#include "tsarag/error.hpp"
#include "tsarag/matrix.hpp"
#include "tsarag/metrics.hpp"
#include "tsarag/missingness.hpp"
#include "tsarag/predictor.hpp"
#include "tsarag/prompt_pool.hpp"
#include "tsarag/remote.hpp"
#include "tsarag/rng.hpp"
#include "tsarag/task.hpp"

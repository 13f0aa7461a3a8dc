#pragma once

#include "distortbench/errors.hpp"
#include "distortbench/tensor.hpp"
#include "distortbench/rng.hpp"
#include "distortbench/filters.hpp"
#include "distortbench/ledger.hpp"
#include "distortbench/calibration.hpp"
#include "distortbench/binary_io.hpp"
#include "distortbench/classifier.hpp"
#include "distortbench/wire.hpp"
#include "distortbench/remote.hpp"
#include "distortbench/sensitivity.hpp"
#include "distortbench/qnet.hpp"
#include "distortbench/agent.hpp"
#include "distortbench/config.hpp"
#include "distortbench/generator.hpp"
#include "distortbench/split_io.hpp"
#include "distortbench/metrics.hpp"
#include "distortbench/pipeline.hpp"

#pragma once

#include "semcache/adapter.hpp"
#include "semcache/benchmark.hpp"
#include "semcache/binary_io.hpp"
#include "semcache/compression.hpp"
#include "semcache/config.hpp"
#include "semcache/datasets.hpp"
#include "semcache/embedding.hpp"
#include "semcache/error.hpp"
#include "semcache/federated.hpp"
#include "semcache/metrics.hpp"
#include "semcache/model_io.hpp"
#include "semcache/pipeline.hpp"
#include "semcache/proxy.hpp"
#include "semcache/remote_provider.hpp"
#include "semcache/rng.hpp"
#include "semcache/semantic_cache.hpp"
#include "semcache/threshold.hpp"
#include "semcache/upstream.hpp"
#include "semcache/workload.hpp"

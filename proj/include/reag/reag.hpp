#pragma once

// Umbrella header. http_backends.hpp is left out so that mock-only users do
// not pull in the HTTP client; config.hpp includes it.

#include "reag/backends.hpp"
#include "reag/config.hpp"
#include "reag/core.hpp"
#include "reag/critic_filter.hpp"
#include "reag/harness.hpp"
#include "reag/knowledge_base.hpp"
#include "reag/parallel.hpp"
#include "reag/prompts.hpp"
#include "reag/retrieval.hpp"
#include "reag/reward.hpp"
#include "reag/rl.hpp"
#include "reag/vector_index.hpp"

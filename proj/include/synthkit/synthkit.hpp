#pragma once

// Umbrella header.

#include "synthkit/backend.hpp"
#include "synthkit/commands.hpp"
#include "synthkit/config.hpp"
#include "synthkit/core.hpp"
#include "synthkit/datagen.hpp"
#include "synthkit/eval.hpp"
#include "synthkit/grouping.hpp"
#include "synthkit/http.hpp"
#include "synthkit/sampling.hpp"
#include "synthkit/strategies.hpp"
#include "synthkit/templates.hpp"

#pragma once

// Umbrella header for the whole toolkit.

#include "logpeft/checkpoint.hpp"
#include "logpeft/config.hpp"
#include "logpeft/drain.hpp"
#include "logpeft/errors.hpp"
#include "logpeft/metrics.hpp"
#include "logpeft/peft.hpp"
#include "logpeft/rng.hpp"
#include "logpeft/sequencer.hpp"
#include "logpeft/tensor.hpp"
#include "logpeft/trainer.hpp"
#include "logpeft/transformer.hpp"

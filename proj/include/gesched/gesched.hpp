// Umbrella header.
#pragma once

#include "actor_critic.hpp"
#include "channel.hpp"
#include "config.hpp"
#include "csv.hpp"
#include "dp.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "policies.hpp"
#include "rng.hpp"
#include "sim.hpp"

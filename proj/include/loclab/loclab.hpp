#pragma once

// Core library. io.hpp and cli.hpp additionally need json.hpp and CLI11.hpp.
#include "loclab/errors.hpp"
#include "loclab/influence.hpp"
#include "loclab/lpi.hpp"
#include "loclab/mdp.hpp"
#include "loclab/measures.hpp"
#include "loclab/poisson.hpp"
#include "loclab/rng.hpp"
#include "loclab/scenarios.hpp"
#include "loclab/space.hpp"
#include "loclab/types.hpp"

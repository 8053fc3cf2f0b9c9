#pragma once

#include "eli/assignment.hpp"
#include "eli/competitors.hpp"
#include "eli/design.hpp"
#include "eli/errors.hpp"
#include "eli/estimators.hpp"
#include "eli/graph.hpp"
#include "eli/harness.hpp"
#include "eli/milp.hpp"
#include "eli/outcome.hpp"
#include "eli/partial.hpp"
#include "eli/pilot.hpp"
#include "eli/rng.hpp"

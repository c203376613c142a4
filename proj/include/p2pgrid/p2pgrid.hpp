#pragma once

#include "p2pgrid/control.hpp"
#include "p2pgrid/epidemic.hpp"
#include "p2pgrid/errors.hpp"
#include "p2pgrid/grid_model.hpp"
#include "p2pgrid/scenario_io.hpp"
#include "p2pgrid/sim.hpp"
#include "p2pgrid/topology.hpp"

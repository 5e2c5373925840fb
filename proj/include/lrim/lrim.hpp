#pragma once

#include <lrim/map_family.hpp>
#include <lrim/funcgrid.hpp>
#include <lrim/observables.hpp>
#include <lrim/transfer.hpp>
#include <lrim/response.hpp>
#include <lrim/cones.hpp>
#include <lrim/asymptotics.hpp>

#pragma once

// Umbrella header.

#include <imifa/assignment.hpp>
#include <imifa/commands.hpp>
#include <imifa/config.hpp>
#include <imifa/criteria.hpp>
#include <imifa/data.hpp>
#include <imifa/density.hpp>
#include <imifa/dist.hpp>
#include <imifa/init.hpp>
#include <imifa/metrics.hpp>
#include <imifa/model.hpp>
#include <imifa/posthoc.hpp>
#include <imifa/priors.hpp>
#include <imifa/sampler.hpp>
#include <imifa/trace_io.hpp>
#include <imifa/types.hpp>
#include <imifa/updates.hpp>

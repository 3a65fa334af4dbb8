// Convenience umbrella for the whole library.
#pragma once

#include "qfilter/common.hpp"
#include "qfilter/config.hpp"
#include "qfilter/dilation.hpp"
#include "qfilter/experiment.hpp"
#include "qfilter/field.hpp"
#include "qfilter/filter.hpp"
#include "qfilter/generator.hpp"
#include "qfilter/kalman.hpp"
#include "qfilter/noise.hpp"
#include "qfilter/operators.hpp"
#include "qfilter/output.hpp"
#include "qfilter/rng.hpp"
#include "qfilter/system.hpp"

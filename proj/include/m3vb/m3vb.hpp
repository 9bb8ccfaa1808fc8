#ifndef M3VB_M3VB_HPP
#define M3VB_M3VB_HPP

#include "m3vb/aggregator.hpp"
#include "m3vb/analysis.hpp"
#include "m3vb/blr.hpp"
#include "m3vb/config.hpp"
#include "m3vb/core.hpp"
#include "m3vb/data.hpp"
#include "m3vb/experiment.hpp"
#include "m3vb/gauss_loc.hpp"
#include "m3vb/gmm.hpp"
#include "m3vb/plot.hpp"

#endif  // M3VB_M3VB_HPP

#pragma once

#include "frailnet/csv.hpp"
#include "frailnet/dataset.hpp"
#include "frailnet/errors.hpp"
#include "frailnet/experiment.hpp"
#include "frailnet/likelihood.hpp"
#include "frailnet/metrics.hpp"
#include "frailnet/model.hpp"
#include "frailnet/nn.hpp"
#include "frailnet/optimize.hpp"
#include "frailnet/rng.hpp"
#include "frailnet/serialize.hpp"
#include "frailnet/sim.hpp"
#include "frailnet/special.hpp"
#include "frailnet/trainer.hpp"

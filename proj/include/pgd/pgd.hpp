#pragma once

#include "pgd/analysis.hpp"
#include "pgd/config.hpp"
#include "pgd/data.hpp"
#include "pgd/error.hpp"
#include "pgd/estimator.hpp"
#include "pgd/exact_sum.hpp"
#include "pgd/linalg.hpp"
#include "pgd/linear_model.hpp"
#include "pgd/log.hpp"
#include "pgd/model.hpp"
#include "pgd/network.hpp"
#include "pgd/predictor.hpp"
#include "pgd/rng.hpp"
#include "pgd/serialize.hpp"
#include "pgd/trainer.hpp"

#pragma once

#include "apac/adam.hpp"
#include "apac/autodiff.hpp"
#include "apac/checkpoint.hpp"
#include "apac/csv.hpp"
#include "apac/environment.hpp"
#include "apac/experiments.hpp"
#include "apac/kde.hpp"
#include "apac/network.hpp"
#include "apac/trainer.hpp"
#include "apac/validation.hpp"

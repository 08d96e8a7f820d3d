#pragma once

#include "spi/config.hpp"
#include "spi/core_math.hpp"
#include "spi/datasets.hpp"
#include "spi/error.hpp"
#include "spi/gradcheck.hpp"
#include "spi/losses.hpp"
#include "spi/model.hpp"
#include "spi/objective.hpp"
#include "spi/pseudo_label.hpp"
#include "spi/sampling.hpp"
#include "spi/sweep.hpp"
#include "spi/trainer.hpp"
#include "spi/types.hpp"

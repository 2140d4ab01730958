#pragma once

#include "softshift/config.hpp"
#include "softshift/data.hpp"
#include "softshift/errors.hpp"
#include "softshift/harness.hpp"
#include "softshift/io.hpp"
#include "softshift/losses.hpp"
#include "softshift/matrix.hpp"
#include "softshift/network.hpp"
#include "softshift/rng.hpp"
#include "softshift/soft_labels.hpp"
#include "softshift/softmax.hpp"
#include "softshift/training.hpp"

#pragma once

#include "spoof/attack.hpp"
#include "spoof/encodings.hpp"
#include "spoof/error.hpp"
#include "spoof/experiment.hpp"
#include "spoof/image.hpp"
#include "spoof/mapelites.hpp"
#include "spoof/metrics.hpp"
#include "spoof/mnist.hpp"
#include "spoof/network.hpp"
#include "spoof/oracle.hpp"
#include "spoof/png.hpp"
#include "spoof/random.hpp"
#include "spoof/stats.hpp"
#include "spoof/train.hpp"
#include "spoof/weights.hpp"
#include "spoof/wire.hpp"

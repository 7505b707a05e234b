#pragma once

#include "fadnet/checkpoint.hpp"
#include "fadnet/conv.hpp"
#include "fadnet/correlation.hpp"
#include "fadnet/data_io.hpp"
#include "fadnet/loss.hpp"
#include "fadnet/network.hpp"
#include "fadnet/tensor.hpp"
#include "fadnet/trainer.hpp"

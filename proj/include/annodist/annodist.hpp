#pragma once

#include "annodist/autodiff.hpp"
#include "annodist/core.hpp"
#include "annodist/data_io.hpp"
#include "annodist/dct.hpp"
#include "annodist/errors.hpp"
#include "annodist/gradcheck.hpp"
#include "annodist/kde.hpp"
#include "annodist/labels.hpp"
#include "annodist/metrics.hpp"
#include "annodist/model.hpp"
#include "annodist/parallel.hpp"
#include "annodist/rng.hpp"
#include "annodist/softhist.hpp"
#include "annodist/synth.hpp"
#include "annodist/tensor.hpp"
#include "annodist/trainer.hpp"

#pragma once

#include "grok/autograd.hpp"
#include "grok/config.hpp"
#include "grok/experiments.hpp"
#include "grok/filter.hpp"
#include "grok/gradcheck.hpp"
#include "grok/graph.hpp"
#include "grok/linalg.hpp"
#include "grok/nn.hpp"
#include "grok/rng.hpp"
#include "grok/spectral.hpp"

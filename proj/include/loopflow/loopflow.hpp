#pragma once

#include "loopflow/error.hpp"
#include "loopflow/manifold.hpp"
#include "loopflow/loop.hpp"
#include "loopflow/perturbation.hpp"
#include "loopflow/loopspace.hpp"
#include "loopflow/parallel.hpp"
#include "loopflow/critical.hpp"
#include "loopflow/heatflow.hpp"
#include "loopflow/admissibility.hpp"
#include "loopflow/linearized.hpp"
#include "loopflow/moduli.hpp"
#include "loopflow/complex.hpp"
#include "loopflow/sampling.hpp"
#include "loopflow/config.hpp"
#include "loopflow/pipeline.hpp"

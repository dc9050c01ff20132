#pragma once

// Everything except fetch.hpp and cli.hpp, which pull in cpp-httplib and OpenSSL.

#include "kpcast/binio.hpp"
#include "kpcast/config.hpp"
#include "kpcast/dataset.hpp"
#include "kpcast/error.hpp"
#include "kpcast/features.hpp"
#include "kpcast/forecast.hpp"
#include "kpcast/ingest.hpp"
#include "kpcast/loss.hpp"
#include "kpcast/metrics.hpp"
#include "kpcast/model.hpp"
#include "kpcast/nnkernel.hpp"
#include "kpcast/plots.hpp"
#include "kpcast/table.hpp"
#include "kpcast/tape.hpp"
#include "kpcast/tensor.hpp"
#include "kpcast/time.hpp"
#include "kpcast/train.hpp"

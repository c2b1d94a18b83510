#pragma once

#include "qnnstream/builder.hpp"
#include "qnnstream/engine.hpp"
#include "qnnstream/error.hpp"
#include "qnnstream/fifo.hpp"
#include "qnnstream/graph.hpp"
#include "qnnstream/kernels.hpp"
#include "qnnstream/netdesc.hpp"
#include "qnnstream/oracle.hpp"
#include "qnnstream/params.hpp"
#include "qnnstream/quant.hpp"
#include "qnnstream/resources.hpp"
#include "qnnstream/stream.hpp"

#pragma once

// Umbrella include for the SeqBoat sequence-modeling laboratory.

#include "seqboat/analysis.hpp"
#include "seqboat/config.hpp"
#include "seqboat/fft.hpp"
#include "seqboat/gau.hpp"
#include "seqboat/gradcheck.hpp"
#include "seqboat/layer.hpp"
#include "seqboat/mdema.hpp"
#include "seqboat/model.hpp"
#include "seqboat/ops.hpp"
#include "seqboat/optim.hpp"
#include "seqboat/sma.hpp"
#include "seqboat/tasks.hpp"
#include "seqboat/tensor.hpp"
#include "seqboat/train.hpp"

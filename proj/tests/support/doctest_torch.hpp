#pragma once

// libtorch's logging header defines a glog-style CHECK that would shadow the
// doctest assertion, so torch goes first and its macro is dropped.
#include <torch/torch.h>
#undef CHECK
#include "doctest.h"

#include "phimesa/kernels.hpp"

// Kernels are header-only templates; this unit exists to give the library a
// home for the translation-unit-level checks.

static_assert(sizeof(float) == 4, "float32 storage assumed by the checkpoint format");

#include "rarx/ensemble.hpp"

#include <omp.h>

namespace rarx {

int ensemble_threads() { return omp_get_max_threads(); }

}  // namespace rarx

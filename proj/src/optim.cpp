#include "pcdesc/optim.hpp"

#include <algorithm>
#include <cmath>

namespace pcdesc::optim {

double lr_schedule_local(int epoch, double base, int every) {
  require(epoch >= 0 && every >= 1, ErrorCode::InvalidArgument, "lr_schedule_local: bad epoch or period");
  return base * std::pow(0.5, epoch / every);
}

double lr_schedule_global(int epoch, double base, double decay, int every, double floor) {
  require(epoch >= 0 && every >= 1, ErrorCode::InvalidArgument, "lr_schedule_global: bad epoch or period");
  return std::max(base * std::pow(decay, epoch / every), floor);
}

}  // namespace pcdesc::optim

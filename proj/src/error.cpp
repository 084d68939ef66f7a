#include "dattn/error.hpp"

namespace dattn {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const TheoryCheckError*>(&e)) return 5;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DimensionError*>(&e)) return 2;
  return 1;
}

}  // namespace dattn

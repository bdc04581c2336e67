#include "epigraf/parallel.hpp"

#include <cstdlib>
#include <string>

namespace epigraf {

int default_worker_count() {
  if (const char* env = std::getenv("EPIGRAF_THREADS"); env != nullptr && *env != '\0') {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace epigraf

#include "funreg/parallel.hpp"

#include <cstdlib>
#include <string>

namespace funreg {

int default_thread_count() {
    const char* env = std::getenv("FUNREG_THREADS");
    if (!env || !*env) return 1;
    try {
        int n = std::stoi(env);
        return n > 0 ? n : 1;
    } catch (const std::exception&) {
        return 1;
    }
}

}  // namespace funreg

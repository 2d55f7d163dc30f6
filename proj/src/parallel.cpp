#include "tcap/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>

namespace tcap {

unsigned thread_count() {
    unsigned n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("TCAP_THREADS")) {
        try {
            const long cap = std::stol(env);
            if (cap > 0) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
        } catch (const std::exception&) {
            // ignored: non-numeric value
        }
    }
    return n;
}

}  // namespace tcap

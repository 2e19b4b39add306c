#pragma once

namespace opgran {

// Kernels that have a data-parallel inner loop come in two flavours. The
// serial one is the reference the tests compare against; both must return
// bit-identical results.
enum class ExecPolicy { serial, parallel };

}  // namespace opgran

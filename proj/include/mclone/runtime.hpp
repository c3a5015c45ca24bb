#pragma once

namespace mclone {

/// Keeps large tensor buffers on the heap instead of fresh mmaps; the
/// network allocates and frees the same sizes every pass.
void tune_allocator();

}  // namespace mclone

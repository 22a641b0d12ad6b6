//! glibc allocator settings for the training loop.
//!
//! Activations are allocated and freed every step. With default settings
//! glibc returns large blocks to the OS with `munmap` and faults them back
//! in on the next step, which costs more than the arithmetic at these
//! model sizes. Raising the mmap and trim thresholds keeps them in the heap.

#[cfg(all(target_os = "linux", target_env = "gnu"))]
pub fn tune() {
    const THRESHOLD: libc::c_int = 32 * 1024 * 1024;
    // SAFETY: mallopt only adjusts allocator parameters; it is called before
    // any worker threads exist.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, THRESHOLD);
        libc::mallopt(libc::M_TRIM_THRESHOLD, libc::c_int::MAX);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
pub fn tune() {}

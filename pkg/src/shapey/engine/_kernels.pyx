# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled dot-product kernel with a fixed float64 accumulation order.

Eight interleaved accumulators (combined in a fixed tree) keep the FMA
pipelines busy while making every pair's score a pure function of the two
rows and the dimension -- independent of tile shapes and worker counts.
Compiled without -ffast-math on purpose: reassociation would break that.
"""

NAME = "native"


cdef inline double _dot_f32(const float* x, const float* y, Py_ssize_t d) noexcept nogil:
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef double s4 = 0.0, s5 = 0.0, s6 = 0.0, s7 = 0.0
    cdef double tail = 0.0
    cdef Py_ssize_t k = 0
    cdef Py_ssize_t d8 = d - (d & 7)
    while k < d8:
        s0 += (<double> x[k]) * (<double> y[k])
        s1 += (<double> x[k + 1]) * (<double> y[k + 1])
        s2 += (<double> x[k + 2]) * (<double> y[k + 2])
        s3 += (<double> x[k + 3]) * (<double> y[k + 3])
        s4 += (<double> x[k + 4]) * (<double> y[k + 4])
        s5 += (<double> x[k + 5]) * (<double> y[k + 5])
        s6 += (<double> x[k + 6]) * (<double> y[k + 6])
        s7 += (<double> x[k + 7]) * (<double> y[k + 7])
        k += 8
    while k < d:
        tail += (<double> x[k]) * (<double> y[k])
        k += 1
    return (((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))) + tail


def dot_block(const float[:, ::1] a, const float[:, ::1] b, double[:, ::1] out):
    """out[i, j] = dot(a[i], b[j]) with float64 accumulation. Releases the GIL."""
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t n = b.shape[0]
    cdef Py_ssize_t d = a.shape[1]
    cdef Py_ssize_t i, j
    if b.shape[1] != d:
        raise ValueError("dimension mismatch")
    if out.shape[0] != m or out.shape[1] != n:
        raise ValueError("output shape mismatch")
    if m == 0 or n == 0:
        return
    with nogil:
        for i in range(m):
            for j in range(n):
                out[i, j] = _dot_f32(&a[i, 0], &b[j, 0], d)

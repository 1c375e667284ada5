/* Measurement kernels.
 *
 * Hot loops live here so that interpreter overhead never lands inside a
 * timed window.  All functions take raw addresses (uint64_t) into caller
 * owned buffers; the Python layer is responsible for sizing and alignment
 * (64-byte blocks, pointers in the first 8 bytes of each block).
 *
 * Timestamp reads are serialized (mfence+lfence before rdtsc, lfence
 * after) so no instruction of the measured body can drift outside the
 * window.  The GIL is released around every loop.
 */

#define PY_SSIZE_T_CLEAN
#include <Python.h>

#include <stdint.h>
#include <string.h>

#if defined(TB_X86_64) && (defined(__x86_64__) || defined(_M_X64))
#define TB_X86 1
#include <cpuid.h>
#include <immintrin.h>
#include <x86intrin.h>
#else
#define TB_X86 0
#endif

/* ------------------------------------------------------------------ */
/* Feature detection                                                   */

static int feat_clflushopt = 0;
static int feat_clwb = 0;
static int feat_avx2 = 0;
static int feat_sse41 = 0;
static int feat_prfchw = 0;
static int feat_rdtscp = 0;
static int feat_invariant_tsc = 0;

static void detect_features(void) {
#if TB_X86
    unsigned a, b, c, d;
    if (__get_cpuid_count(7, 0, &a, &b, &c, &d)) {
        feat_clflushopt = !!(b & (1u << 23));
        feat_clwb = !!(b & (1u << 24));
        feat_avx2 = !!(b & (1u << 5));
    }
    if (__get_cpuid(1, &a, &b, &c, &d))
        feat_sse41 = !!(c & (1u << 19));
    if (__get_cpuid(0x80000001, &a, &b, &c, &d)) {
        feat_rdtscp = !!(d & (1u << 27));
        feat_prfchw = !!(c & (1u << 8));
    }
    if (__get_cpuid(0x80000007, &a, &b, &c, &d))
        feat_invariant_tsc = !!(d & (1u << 8));
#endif
}

#if TB_X86

/* ------------------------------------------------------------------ */
/* Serialized timestamp reads                                          */

static inline uint64_t rd_strict(void) {
    _mm_mfence();
    _mm_lfence();
    uint64_t t = __rdtsc();
    _mm_lfence();
    return t;
}

static inline uint64_t rd_relaxed(void) {
    unsigned aux;
    uint64_t t = __rdtscp(&aux);
    _mm_lfence();
    return t;
}

static inline uint64_t rd(int strict) { return strict ? rd_strict() : rd_relaxed(); }

/* Targeted wrappers so the baseline build stays plain x86-64 and the
 * optional instructions are gated purely by runtime CPUID flags. */
__attribute__((target("clflushopt"))) static void do_clflushopt(const void *p) {
    _mm_clflushopt((void *)p);
}
__attribute__((target("clwb"))) static void do_clwb(const void *p) {
    _mm_clwb((void *)p);
}
__attribute__((target("prfchw"))) static void do_prefetchw(const void *p) {
    _m_prefetchw((void *)p);
}

static inline void flush_line(const void *p, int instr) {
    switch (instr) {
    case 0: _mm_clflush(p); break;
    case 1: do_clflushopt(p); break;
    default: do_clwb(p); break;
    }
}

static inline void prefetch_hint(const void *p, int hint) {
    switch (hint) {
    case 0: _mm_prefetch((const char *)p, _MM_HINT_T0); break;
    case 1: _mm_prefetch((const char *)p, _MM_HINT_T1); break;
    case 2: _mm_prefetch((const char *)p, _MM_HINT_T2); break;
    case 3: _mm_prefetch((const char *)p, _MM_HINT_NTA); break;
    case 4: do_prefetchw(p); break;
    default: break; /* -1: no prefetch, overhead reference */
    }
}

/* ------------------------------------------------------------------ */
/* Pointer chasing                                                     */

static uint64_t chase_plain(uint64_t cur, uint64_t hops) {
    for (uint64_t h = 0; h < hops; h++)
        cur = *(const volatile uint64_t *)cur;
    return cur;
}

static uint64_t chase_flush(uint64_t cur, uint64_t hops, int strict) {
    for (uint64_t h = 0; h < hops; h++) {
        uint64_t next = *(const volatile uint64_t *)cur;
        _mm_clflush((const void *)cur);
        if (strict)
            _mm_mfence();
        cur = next;
    }
    _mm_mfence();
    return cur;
}

static uint64_t chase_store_(uint64_t cur, uint64_t hops, int flush_each, int strict,
                             int nontemporal) {
    for (uint64_t h = 0; h < hops; h++) {
        uint64_t next = *(const volatile uint64_t *)cur;
        if (nontemporal)
            _mm_stream_si64((long long *)(cur + 8), (long long)next);
        else
            *(volatile uint64_t *)(cur + 8) = next; /* dirty the visited line */
        if (flush_each) {
            _mm_clflush((const void *)cur);
            if (strict)
                _mm_mfence();
        }
        cur = next;
    }
    _mm_mfence();
    return cur;
}

static uint64_t chase_cmpxchg_(uint64_t cur, uint64_t hops, int as_store, int flush_each,
                               int strict) {
    for (uint64_t h = 0; h < hops; h++) {
        volatile uint64_t *word = (volatile uint64_t *)(cur + 8);
        /* as load: expected never matches, no write occurs; as store:
         * scratch word stays 0 so the exchange always succeeds. */
        uint64_t expected = as_store ? 0 : ~(uint64_t)0;
        uint64_t desired = 0;
        __atomic_compare_exchange_n((uint64_t *)word, &expected, desired, 0,
                                    __ATOMIC_SEQ_CST, __ATOMIC_SEQ_CST);
        uint64_t next = *(const volatile uint64_t *)cur;
        if (flush_each) {
            _mm_clflush((const void *)cur);
            if (strict)
                _mm_mfence();
        }
        cur = next;
    }
    _mm_mfence();
    return cur;
}

__attribute__((target("sse4.1"))) static uint64_t chase_nt_(uint64_t cur, uint64_t hops) {
    for (uint64_t h = 0; h < hops; h++) {
        __m128i v = _mm_stream_load_si128((__m128i *)cur);
        cur = (uint64_t)_mm_cvtsi128_si64(v);
    }
    return cur;
}

/* ------------------------------------------------------------------ */
/* Streaming kernels                                                   */

__attribute__((target("avx2"))) static uint64_t stream_load_avx2(const uint8_t *p, size_t bytes) {
    const __m256i *v = (const __m256i *)p;
    size_t n = bytes / 32;
    __m256i a0 = _mm256_setzero_si256(), a1 = a0, a2 = a0, a3 = a0;
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        a0 = _mm256_add_epi64(a0, _mm256_loadu_si256(v + i));
        a1 = _mm256_add_epi64(a1, _mm256_loadu_si256(v + i + 1));
        a2 = _mm256_add_epi64(a2, _mm256_loadu_si256(v + i + 2));
        a3 = _mm256_add_epi64(a3, _mm256_loadu_si256(v + i + 3));
        a0 = _mm256_add_epi64(a0, _mm256_loadu_si256(v + i + 4));
        a1 = _mm256_add_epi64(a1, _mm256_loadu_si256(v + i + 5));
        a2 = _mm256_add_epi64(a2, _mm256_loadu_si256(v + i + 6));
        a3 = _mm256_add_epi64(a3, _mm256_loadu_si256(v + i + 7));
    }
    a0 = _mm256_add_epi64(_mm256_add_epi64(a0, a1), _mm256_add_epi64(a2, a3));
    uint64_t out[4];
    _mm256_storeu_si256((__m256i *)out, a0);
    return out[0] ^ out[1] ^ out[2] ^ out[3];
}

static uint64_t stream_load_scalar(const uint8_t *p, size_t bytes) {
    const volatile uint64_t *v = (const volatile uint64_t *)p;
    size_t n = bytes / 8;
    uint64_t a0 = 0, a1 = 0, a2 = 0, a3 = 0;
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        a0 += v[i];
        a1 += v[i + 1];
        a2 += v[i + 2];
        a3 += v[i + 3];
    }
    return a0 ^ a1 ^ a2 ^ a3;
}

__attribute__((target("sse4.1"))) static uint64_t stream_load_ntk(const uint8_t *p, size_t bytes) {
    const __m128i *v = (const __m128i *)p;
    size_t n = bytes / 16;
    __m128i acc = _mm_setzero_si128();
    for (size_t i = 0; i < n; i += 4) {
        acc = _mm_add_epi64(acc, _mm_stream_load_si128((__m128i *)(v + i)));
        acc = _mm_add_epi64(acc, _mm_stream_load_si128((__m128i *)(v + i + 1)));
        acc = _mm_add_epi64(acc, _mm_stream_load_si128((__m128i *)(v + i + 2)));
        acc = _mm_add_epi64(acc, _mm_stream_load_si128((__m128i *)(v + i + 3)));
    }
    uint64_t out[2];
    _mm_storeu_si128((__m128i *)out, acc);
    return out[0] ^ out[1];
}

__attribute__((target("avx2"))) static void stream_store_avx2(uint8_t *p, size_t bytes, int nt) {
    __m256i z = _mm256_set1_epi64x(0x5a5a5a5a5a5a5a5aLL);
    __m256i *v = (__m256i *)p;
    size_t n = bytes / 32;
    if (nt) {
        for (size_t i = 0; i < n; i++)
            _mm256_stream_si256(v + i, z);
        _mm_sfence();
    } else {
        for (size_t i = 0; i < n; i++)
            _mm256_storeu_si256(v + i, z);
    }
}

static void stream_store_scalar(uint8_t *p, size_t bytes) {
    volatile uint64_t *v = (volatile uint64_t *)p;
    size_t n = bytes / 8;
    for (size_t i = 0; i < n; i++)
        v[i] = 0x5a5a5a5a5a5a5a5aULL;
}

/* ------------------------------------------------------------------ */
/* Buffer passes                                                       */

static uint64_t load_pass_(const uint8_t *p, size_t bytes) {
    uint64_t acc = 0;
    for (size_t off = 0; off < bytes; off += 64)
        acc += *(const volatile uint64_t *)(p + off);
    return acc;
}

static void dirty_pass_(uint8_t *p, size_t bytes, int full_line) {
    if (full_line) {
        for (size_t off = 0; off < bytes; off += 8)
            *(volatile uint64_t *)(p + off) = off;
    } else {
        for (size_t off = 0; off < bytes; off += 64)
            *(volatile uint64_t *)(p + off) = off;
    }
    _mm_mfence();
}

static uint64_t flush_pass_(const uint8_t *p, size_t bytes, int instr, int per_line_fence) {
    uint64_t t0 = rd_strict();
    for (size_t off = 0; off < bytes; off += 64) {
        flush_line(p + off, instr);
        if (per_line_fence)
            _mm_mfence();
    }
    _mm_mfence();
    return rd_strict() - t0;
}

/* ------------------------------------------------------------------ */
/* Sampled probes (per-sample timing must avoid interpreter overhead)  */

static void prefetch_samples_(const uint64_t *addrs, size_t n, int hint, uint64_t *out) {
    for (size_t i = 0; i < n; i++) {
        const void *p = (const void *)addrs[i];
        _mm_clflush(p);
        _mm_mfence();
        uint64_t t0 = rd_strict();
        prefetch_hint(p, hint);
        uint64_t t1 = rd_strict();
        out[i] = t1 - t0;
    }
}

static void load_after_prefetch_samples_(const uint64_t *addrs, size_t n, int hint,
                                         uint64_t *out) {
    for (size_t i = 0; i < n; i++) {
        const volatile uint64_t *p = (const volatile uint64_t *)addrs[i];
        _mm_clflush((const void *)p);
        _mm_mfence();
        prefetch_hint((const void *)p, hint);
        /* wait for the prefetch fill before timing the demand load */
        uint64_t spin = rd_strict() + 2000;
        while (rd_relaxed() < spin)
            _mm_pause();
        uint64_t t0 = rd_strict();
        uint64_t v = *p;
        uint64_t t1 = rd_strict();
        (void)v;
        out[i] = t1 - t0;
    }
}

static void load_samples_(const uint64_t *addrs, size_t n, int flush_first, uint64_t *out,
                          uint8_t *seen) {
    /* Visit in xorshift order with a data-dependent index: reading the
     * address array sequentially lets pointer-array prefetchers resolve
     * the targets ahead of the timed loads. */
    uint64_t s = 88172645463325252ULL;
    for (size_t done = 0; done < n;) {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        size_t idx = s % n;
        if (seen[idx])
            continue;
        seen[idx] = 1;
        const volatile uint64_t *p = (const volatile uint64_t *)addrs[idx];
        if (flush_first) {
            _mm_clflush((const void *)p);
            _mm_mfence();
        }
        uint64_t t0 = rd_strict();
        uint64_t v = *p;
        uint64_t t1 = rd_strict();
        (void)v;
        out[done++] = t1 - t0;
    }
}

static void flush_reload_samples_(const uint64_t *addrs, size_t n, int instr,
                                  uint64_t *out, uint8_t *seen) {
    /* per line: dirty it, flush it with `instr`, fence, reload it timed.
     * xorshift visit order defeats pointer-array prefetching. */
    uint64_t s = 2463534242ULL;
    for (size_t done = 0; done < n;) {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        size_t idx = s % n;
        if (seen[idx])
            continue;
        seen[idx] = 1;
        volatile uint64_t *p = (volatile uint64_t *)addrs[idx];
        *p = s;
        _mm_mfence();
        flush_line((const void *)p, instr);
        _mm_mfence();
        uint64_t t0 = rd_strict();
        uint64_t v = *p;
        uint64_t t1 = rd_strict();
        (void)v;
        out[done++] = t1 - t0;
    }
}

static void copy_samples_(uint8_t *dst, const uint8_t *src, size_t size, size_t n,
                          int flush_before, uint64_t *out) {
    for (size_t i = 0; i < n; i++) {
        if (flush_before) {
            for (size_t off = 0; off < size; off += 64) {
                _mm_clflush(src + off);
                _mm_clflush(dst + off);
            }
            _mm_mfence();
        }
        uint64_t t0 = rd_strict();
        memcpy(dst, src, size);
        uint64_t t1 = rd_strict();
        out[i] = t1 - t0;
    }
}

static uint64_t footprint_probe_(const uint8_t *base, uint64_t stride, uint64_t warm,
                                 uint64_t *scratch, size_t reps) {
    for (size_t r = 0; r < reps; r++) {
        for (uint64_t i = 0; i <= warm; i++)
            _mm_clflush(base + i * stride);
        _mm_mfence();
        uint64_t acc = 0;
        for (uint64_t i = 0; i < warm; i++)
            acc += *(const volatile uint64_t *)(base + i * stride);
        uint64_t t0 = rd_strict();
        acc += *(const volatile uint64_t *)(base + warm * stride);
        uint64_t t1 = rd_strict();
        __asm__ __volatile__("" ::"r"(acc));
        scratch[r] = t1 - t0;
    }
    /* median via insertion sort; reps is small */
    for (size_t i = 1; i < reps; i++) {
        uint64_t key = scratch[i];
        size_t j = i;
        while (j > 0 && scratch[j - 1] > key) {
            scratch[j] = scratch[j - 1];
            j--;
        }
        scratch[j] = key;
    }
    return scratch[reps / 2];
}

/* ------------------------------------------------------------------ */
/* Spinlock contention worker                                          */

static void spin_worker_(volatile uint64_t *lock, volatile uint64_t *data, uint64_t iters,
                         uint64_t seed, uint64_t hold_cycles, int flush_each, uint64_t *ops_out,
                         uint64_t *spins_out) {
    uint64_t s = seed ? seed : 1;
    uint64_t spins = 0;
    for (uint64_t i = 0; i < iters; i++) {
        while (__atomic_exchange_n((uint64_t *)lock, 1, __ATOMIC_ACQUIRE)) {
            do {
                spins++;
                _mm_pause();
            } while (__atomic_load_n((uint64_t *)lock, __ATOMIC_RELAXED));
        }
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        *data = s;
        if (flush_each)
            _mm_clflush((const void *)data);
        _mm_mfence();
        if (hold_cycles) {
            uint64_t until = __rdtsc() + hold_cycles;
            while (__rdtsc() < until)
                _mm_pause();
        }
        __atomic_store_n((uint64_t *)lock, 0, __ATOMIC_RELEASE);
    }
    *ops_out = iters;
    *spins_out = spins;
}

#endif /* TB_X86 */

/* ------------------------------------------------------------------ */
/* Lock-free structures (portable C11 atomics)                         */
/*                                                                     */
/* All structures live entirely inside a caller-provided region so the */
/* benchmark's placement policy governs every byte they touch.         */

#if !TB_X86
static inline void _mm_pause(void) {}
static inline void _mm_mfence(void) { __atomic_thread_fence(__ATOMIC_SEQ_CST); }
#endif

/* Waiting sides pause-spin, then yield: on oversubscribed hosts the
 * yield hands the partner a full quantum so each handoff amortizes
 * over a whole burst instead of thrashing. */
#include <sched.h>

#define SPIN_BEFORE_YIELD 512

static inline void relax(unsigned *tries) {
    _mm_pause();
    if (++*tries >= SPIN_BEFORE_YIELD) {
        sched_yield();
        *tries = 0;
    }
}

/* Exponential backoff for CAS-failure paths: contention storms between
 * descheduled vCPUs otherwise dominate the measurement. */
static inline void backoff(unsigned *level) {
    unsigned spins = 1u << (*level > 10 ? 10 : *level);
    for (unsigned i = 0; i < spins; i++)
        _mm_pause();
    (*level)++;
    if (*level > 16) {
        sched_yield();
        *level = 0;
    }
}

/* SPSC ring: head / tail / capacity each on their own cache line,
 * slots follow at offset 256.  Capacity is arbitrary (>= 2): the
 * counters run free and each side keeps a local wrapped offset, which
 * lets callers size the ring as fill + constant slack. */
typedef struct {
    uint64_t head;
    uint64_t _pad0[7];
    uint64_t tail;
    uint64_t _pad1[7];
    uint64_t capacity;
    uint64_t magic;
    uint64_t _pad2[6];
    uint64_t _pad3[8];
    uint64_t slots[];
} spsc_t;

#define SPSC_MAGIC 0x5053435174626e63ULL

static void spsc_init_(void *base, uint64_t capacity) {
    spsc_t *q = (spsc_t *)base;
    q->head = 0;
    q->tail = 0;
    q->capacity = capacity;
    q->magic = SPSC_MAGIC;
}

static uint64_t spsc_produce_(void *base, uint64_t n, uint64_t start) {
    spsc_t *q = (spsc_t *)base;
    uint64_t cap = q->capacity, waits = 0;
    uint64_t tail = __atomic_load_n(&q->tail, __ATOMIC_RELAXED);
    uint64_t pos = tail % cap;
    unsigned tries = 0;
    for (uint64_t i = 0; i < n; i++) {
        while (tail - __atomic_load_n(&q->head, __ATOMIC_ACQUIRE) == cap) {
            waits++;
            relax(&tries);
        }
        q->slots[pos] = start + i;
        if (++pos == cap)
            pos = 0;
        __atomic_store_n(&q->tail, tail + 1, __ATOMIC_RELEASE);
        tail++;
    }
    return waits;
}

static void spsc_consume_(void *base, uint64_t n, uint64_t expected_start, uint64_t *out,
                          uint64_t *violations_out, uint64_t *checksum_out) {
    spsc_t *q = (spsc_t *)base;
    uint64_t cap = q->capacity;
    uint64_t head = __atomic_load_n(&q->head, __ATOMIC_RELAXED);
    uint64_t pos = head % cap;
    uint64_t violations = 0, checksum = 0, expect = expected_start;
    unsigned tries = 0;
    for (uint64_t i = 0; i < n; i++) {
        while (__atomic_load_n(&q->tail, __ATOMIC_ACQUIRE) == head)
            relax(&tries);
        uint64_t v = q->slots[pos];
        if (++pos == cap)
            pos = 0;
        __atomic_store_n(&q->head, head + 1, __ATOMIC_RELEASE);
        head++;
        if (v != expect)
            violations++;
        expect = v + 1;
        checksum += v;
        if (out)
            out[i] = v;
    }
    *violations_out = violations;
    *checksum_out = checksum;
}

/* MPMC: Michael-Scott style linked queue over a fixed node pool with
 * packed {index, tag} references (the tag defeats ABA, the pool keeps
 * reclaimed nodes mapped so stale readers never fault).  A Treiber
 * stack with the same tagged references serves as the free list. */

#define MPMC_NULL 0xffffffffu

typedef struct {
    uint64_t next; /* packed {idx, tag} */
    uint64_t value;
    uint64_t _pad[6];
} mpmc_node_t;

typedef struct {
    uint64_t head;
    uint64_t _pad0[7];
    uint64_t tail;
    uint64_t _pad1[7];
    uint64_t free_top;
    uint64_t _pad2[7];
    uint64_t pool_cap;
    uint64_t magic;
    uint64_t _pad3[6];
    mpmc_node_t nodes[];
} mpmc_t;

#define MPMC_MAGIC 0x4d504d4374626e63ULL

static inline uint64_t pk(uint32_t idx, uint32_t tag) { return ((uint64_t)tag << 32) | idx; }
static inline uint32_t pk_idx(uint64_t p) { return (uint32_t)p; }
static inline uint32_t pk_tag(uint64_t p) { return (uint32_t)(p >> 32); }

static void mpmc_init_(void *base, uint64_t pool_cap) {
    mpmc_t *q = (mpmc_t *)base;
    q->pool_cap = pool_cap;
    q->magic = MPMC_MAGIC;
    /* node 0 is the initial dummy */
    q->nodes[0].next = pk(MPMC_NULL, 0);
    q->nodes[0].value = 0;
    q->head = pk(0, 0);
    q->tail = pk(0, 0);
    for (uint64_t i = 1; i < pool_cap; i++) {
        q->nodes[i].next = pk(i + 1 < pool_cap ? (uint32_t)(i + 1) : MPMC_NULL, 0);
        q->nodes[i].value = 0;
    }
    q->free_top = pk(1, 0);
}

static uint32_t mpmc_alloc(mpmc_t *q, uint64_t *waits) {
    unsigned tries = 0;
    for (;;) {
        uint64_t top = __atomic_load_n(&q->free_top, __ATOMIC_ACQUIRE);
        uint32_t idx = pk_idx(top);
        if (idx == MPMC_NULL) {
            (*waits)++;
            relax(&tries); /* consumers will return nodes */
            continue;
        }
        uint64_t next = __atomic_load_n(&q->nodes[idx].next, __ATOMIC_RELAXED);
        uint64_t want = pk(pk_idx(next), pk_tag(top) + 1);
        if (__atomic_compare_exchange_n(&q->free_top, &top, want, 0, __ATOMIC_SEQ_CST,
                                        __ATOMIC_RELAXED))
            return idx;
    }
}

static void mpmc_free(mpmc_t *q, uint32_t idx) {
    for (;;) {
        uint64_t top = __atomic_load_n(&q->free_top, __ATOMIC_ACQUIRE);
        __atomic_store_n(&q->nodes[idx].next, pk(pk_idx(top), 0), __ATOMIC_RELAXED);
        uint64_t want = pk(idx, pk_tag(top) + 1);
        if (__atomic_compare_exchange_n(&q->free_top, &top, want, 0, __ATOMIC_SEQ_CST,
                                        __ATOMIC_RELAXED))
            return;
    }
}

static uint64_t mpmc_enqueue_n_(void *base, uint64_t n, uint64_t start) {
    mpmc_t *q = (mpmc_t *)base;
    uint64_t waits = 0;
    for (uint64_t i = 0; i < n; i++) {
        uint32_t node = mpmc_alloc(q, &waits);
        q->nodes[node].value = start + i;
        __atomic_store_n(&q->nodes[node].next, pk(MPMC_NULL, pk_tag(q->nodes[node].next)),
                         __ATOMIC_RELEASE);
        unsigned bk = 0;
        for (;;) {
            uint64_t tail = __atomic_load_n(&q->tail, __ATOMIC_ACQUIRE);
            uint32_t ti = pk_idx(tail);
            uint64_t next = __atomic_load_n(&q->nodes[ti].next, __ATOMIC_ACQUIRE);
            if (tail != __atomic_load_n(&q->tail, __ATOMIC_ACQUIRE))
                continue;
            if (pk_idx(next) == MPMC_NULL) {
                uint64_t want = pk(node, pk_tag(next) + 1);
                if (__atomic_compare_exchange_n(&q->nodes[ti].next, &next, want, 0,
                                                __ATOMIC_SEQ_CST, __ATOMIC_RELAXED)) {
                    uint64_t tw = pk(node, pk_tag(tail) + 1);
                    __atomic_compare_exchange_n(&q->tail, &tail, tw, 0, __ATOMIC_SEQ_CST,
                                                __ATOMIC_RELAXED);
                    break;
                }
                backoff(&bk);
            } else {
                uint64_t tw = pk(pk_idx(next), pk_tag(tail) + 1);
                __atomic_compare_exchange_n(&q->tail, &tail, tw, 0, __ATOMIC_SEQ_CST,
                                            __ATOMIC_RELAXED);
            }
        }
    }
    return waits;
}

static void mpmc_dequeue_n_(void *base, uint64_t n, uint64_t *out, uint64_t *count_out,
                            uint64_t *checksum_out) {
    mpmc_t *q = (mpmc_t *)base;
    uint64_t got = 0, checksum = 0;
    unsigned tries = 0, bk = 0;
    while (got < n) {
        uint64_t head = __atomic_load_n(&q->head, __ATOMIC_ACQUIRE);
        uint32_t hi = pk_idx(head);
        uint64_t tail = __atomic_load_n(&q->tail, __ATOMIC_ACQUIRE);
        uint64_t next = __atomic_load_n(&q->nodes[hi].next, __ATOMIC_ACQUIRE);
        if (head != __atomic_load_n(&q->head, __ATOMIC_ACQUIRE))
            continue;
        if (hi == pk_idx(tail)) {
            if (pk_idx(next) == MPMC_NULL) {
                relax(&tries); /* empty: producers still working */
                continue;
            }
            uint64_t tw = pk(pk_idx(next), pk_tag(tail) + 1);
            __atomic_compare_exchange_n(&q->tail, &tail, tw, 0, __ATOMIC_SEQ_CST,
                                        __ATOMIC_RELAXED);
            continue;
        }
        uint32_t ni = pk_idx(next);
        uint64_t value = __atomic_load_n(&q->nodes[ni].value, __ATOMIC_ACQUIRE);
        uint64_t hw = pk(ni, pk_tag(head) + 1);
        if (__atomic_compare_exchange_n(&q->head, &head, hw, 0, __ATOMIC_SEQ_CST,
                                        __ATOMIC_RELAXED)) {
            mpmc_free(q, hi);
            if (out)
                out[got] = value;
            checksum += value;
            got++;
            bk = 0;
        } else {
            backoff(&bk);
        }
    }
    *count_out = got;
    *checksum_out = checksum;
}

/* Open-addressing map: slots of {key, value}, linear probing, keys are
 * never deleted.  Values encode (key << 20 | version) so readers can
 * validate that any observed value belongs to its key. */

typedef struct {
    uint64_t slot_count;
    uint64_t magic;
    uint64_t _pad[6];
    uint64_t kv[]; /* pairs: kv[2*i] = key, kv[2*i+1] = value */
} map_t;

#define MAP_MAGIC 0x4d41507474626e63ULL
#define MAP_VERSION_BITS 20
#define MAP_VERSION_MASK ((1ULL << MAP_VERSION_BITS) - 1)

static inline uint64_t map_hash(uint64_t k) {
    k ^= k >> 33;
    k *= 0xff51afd7ed558ccdULL;
    k ^= k >> 33;
    k *= 0xc4ceb9fe1a85ec53ULL;
    k ^= k >> 33;
    return k;
}

static inline uint64_t map_encode(uint64_t key, uint64_t version) {
    return (key << MAP_VERSION_BITS) | (version & MAP_VERSION_MASK);
}

static void map_init_(void *base, uint64_t slot_count) {
    map_t *m = (map_t *)base;
    m->slot_count = slot_count;
    m->magic = MAP_MAGIC;
    memset(m->kv, 0, slot_count * 16);
}

static int map_insert(map_t *m, uint64_t key, uint64_t value) {
    uint64_t mask = m->slot_count - 1;
    uint64_t i = map_hash(key) & mask;
    for (uint64_t probes = 0; probes < m->slot_count; probes++, i = (i + 1) & mask) {
        uint64_t cur = __atomic_load_n(&m->kv[2 * i], __ATOMIC_ACQUIRE);
        if (cur == key) {
            __atomic_store_n(&m->kv[2 * i + 1], value, __ATOMIC_RELEASE);
            return 1;
        }
        if (cur == 0) {
            uint64_t expected = 0;
            if (__atomic_compare_exchange_n(&m->kv[2 * i], &expected, key, 0, __ATOMIC_SEQ_CST,
                                            __ATOMIC_ACQUIRE)) {
                __atomic_store_n(&m->kv[2 * i + 1], value, __ATOMIC_RELEASE);
                return 1;
            }
            if (expected == key) {
                __atomic_store_n(&m->kv[2 * i + 1], value, __ATOMIC_RELEASE);
                return 1;
            }
        }
    }
    return 0;
}

static inline uint64_t *map_slot(map_t *m, uint64_t key) {
    uint64_t mask = m->slot_count - 1;
    uint64_t i = map_hash(key) & mask;
    for (uint64_t probes = 0; probes < m->slot_count; probes++, i = (i + 1) & mask) {
        uint64_t cur = __atomic_load_n(&m->kv[2 * i], __ATOMIC_ACQUIRE);
        if (cur == key)
            return &m->kv[2 * i + 1];
        if (cur == 0)
            return NULL;
    }
    return NULL;
}

static uint64_t map_populate_(void *base, uint64_t n_keys) {
    map_t *m = (map_t *)base;
    uint64_t failed = 0;
    for (uint64_t k = 1; k <= n_keys; k++)
        failed += !map_insert(m, k, map_encode(k, 0));
    return failed;
}

static void map_update_worker_(void *base, uint64_t n_ops, uint64_t n_keys, uint64_t seed,
                               int check_ryw, uint64_t *last_versions, uint64_t *violations_out) {
    map_t *m = (map_t *)base;
    uint64_t s = seed ? seed : 1, violations = 0;
    for (uint64_t op = 0; op < n_ops; op++) {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        uint64_t key = (s % n_keys) + 1;
        uint64_t version = (op + 1) & MAP_VERSION_MASK;
        uint64_t *slot = map_slot(m, key);
        if (!slot) {
            violations++;
            continue;
        }
        uint64_t value = map_encode(key, version);
        __atomic_store_n(slot, value, __ATOMIC_RELEASE);
        if (check_ryw) {
            uint64_t seen = __atomic_load_n(slot, __ATOMIC_ACQUIRE);
            if (seen != value)
                violations++; /* single-writer runs must read their own write */
        }
        if (last_versions)
            last_versions[key - 1] = value;
    }
    *violations_out = violations;
}

static void map_get_worker_(void *base, uint64_t n_ops, uint64_t n_keys, uint64_t seed,
                            uint64_t *violations_out, uint64_t *checksum_out) {
    map_t *m = (map_t *)base;
    uint64_t s = seed ? seed : 1, violations = 0, checksum = 0;
    for (uint64_t op = 0; op < n_ops; op++) {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        uint64_t key = (s % n_keys) + 1;
        uint64_t *slot = map_slot(m, key);
        if (!slot) {
            violations++;
            continue;
        }
        uint64_t value = __atomic_load_n(slot, __ATOMIC_ACQUIRE);
        if ((value >> MAP_VERSION_BITS) != key)
            violations++; /* value must always belong to its key */
        checksum += value;
    }
    *violations_out = violations;
    *checksum_out = checksum;
}

static uint64_t map_final_check_(void *base, uint64_t n_keys, const uint64_t *last_versions) {
    map_t *m = (map_t *)base;
    uint64_t mismatches = 0;
    for (uint64_t k = 1; k <= n_keys; k++) {
        uint64_t *slot = map_slot(m, k);
        uint64_t expect = last_versions[k - 1] ? last_versions[k - 1] : map_encode(k, 0);
        if (!slot || __atomic_load_n(slot, __ATOMIC_ACQUIRE) != expect)
            mismatches++;
    }
    return mismatches;
}

/* ------------------------------------------------------------------ */
/* Python bindings                                                     */

#if TB_X86
#define REQUIRE_X86()
#else
#define REQUIRE_X86()                                                                     \
    do {                                                                                  \
        PyErr_SetString(PyExc_RuntimeError, "x86-64 kernels unavailable on this build"); \
        return NULL;                                                                      \
    } while (0)
#endif

static PyObject *py_features(PyObject *self, PyObject *args) {
    return Py_BuildValue("{s:i,s:i,s:i,s:i,s:i,s:i,s:i,s:i}", "x86", TB_X86, "clflushopt",
                         feat_clflushopt, "clwb", feat_clwb, "avx2", feat_avx2, "sse41",
                         feat_sse41, "prefetchw", feat_prfchw, "rdtscp", feat_rdtscp,
                         "invariant_tsc", feat_invariant_tsc);
}

static PyObject *py_cache_info(PyObject *self, PyObject *args) {
    PyObject *out = PyList_New(0);
    if (!out)
        return NULL;
#if TB_X86
    unsigned a, b, c, d;
    __get_cpuid(0, &a, &b, &c, &d);
    int leaf = 4;
    if (b == 0x68747541) /* AuthenticAMD */
        leaf = 0x8000001d;
    for (int i = 0; i < 16; i++) {
        if (!__get_cpuid_count(leaf, i, &a, &b, &c, &d))
            break;
        unsigned type = a & 0x1f;
        if (!type)
            break;
        unsigned level = (a >> 5) & 7;
        unsigned long ways = ((b >> 22) & 0x3ff) + 1;
        unsigned long parts = ((b >> 12) & 0x3ff) + 1;
        unsigned long line = (b & 0xfff) + 1;
        unsigned long sets = (unsigned long)c + 1;
        const char *kind = type == 1 ? "Data" : type == 2 ? "Instruction" : "Unified";
        PyObject *entry = Py_BuildValue("{s:I,s:s,s:k,s:k,s:k}", "level", level, "type", kind,
                                        "line_bytes", line, "size_bytes",
                                        ways * parts * line * sets, "ways", ways);
        if (!entry || PyList_Append(out, entry) < 0) {
            Py_XDECREF(entry);
            Py_DECREF(out);
            return NULL;
        }
        Py_DECREF(entry);
    }
#endif
    return out;
}

#if TB_X86

static PyObject *py_tsc(PyObject *self, PyObject *args) {
    int strict = 1;
    if (!PyArg_ParseTuple(args, "|i", &strict))
        return NULL;
    return PyLong_FromUnsignedLongLong(rd(strict));
}

static PyObject *py_tsc_overhead(PyObject *self, PyObject *args) {
    Py_ssize_t n = 1001;
    if (!PyArg_ParseTuple(args, "|n", &n))
        return NULL;
    if (n < 1 || n > 1000000) {
        PyErr_SetString(PyExc_ValueError, "sample count out of range");
        return NULL;
    }
    uint64_t *buf = PyMem_Malloc(n * sizeof(uint64_t));
    if (!buf)
        return PyErr_NoMemory();
    Py_BEGIN_ALLOW_THREADS;
    for (Py_ssize_t i = 0; i < n; i++) {
        uint64_t t0 = rd_strict();
        uint64_t t1 = rd_strict();
        buf[i] = t1 - t0;
    }
    /* median */
    for (Py_ssize_t i = 1; i < n; i++) {
        uint64_t key = buf[i];
        Py_ssize_t j = i;
        while (j > 0 && buf[j - 1] > key) {
            buf[j] = buf[j - 1];
            j--;
        }
        buf[j] = key;
    }
    Py_END_ALLOW_THREADS;
    uint64_t med = buf[n / 2];
    PyMem_Free(buf);
    return PyLong_FromUnsignedLongLong(med);
}

static PyObject *py_chase(PyObject *self, PyObject *args) {
    unsigned long long start, hops;
    int flush_each = 0, strict = 1;
    if (!PyArg_ParseTuple(args, "KK|ii", &start, &hops, &flush_each, &strict))
        return NULL;
    uint64_t cur = start;
    Py_BEGIN_ALLOW_THREADS;
    cur = flush_each ? chase_flush(cur, hops, strict) : chase_plain(cur, hops);
    Py_END_ALLOW_THREADS;
    return PyLong_FromUnsignedLongLong(cur);
}

static PyObject *py_chase_store(PyObject *self, PyObject *args) {
    unsigned long long start, hops;
    int flush_each = 0, strict = 1, nontemporal = 0;
    if (!PyArg_ParseTuple(args, "KK|iii", &start, &hops, &flush_each, &strict, &nontemporal))
        return NULL;
    uint64_t cur = start;
    Py_BEGIN_ALLOW_THREADS;
    cur = chase_store_(cur, hops, flush_each, strict, nontemporal);
    Py_END_ALLOW_THREADS;
    return PyLong_FromUnsignedLongLong(cur);
}

static PyObject *py_chase_cmpxchg(PyObject *self, PyObject *args) {
    unsigned long long start, hops;
    int as_store = 0, flush_each = 0, strict = 1;
    if (!PyArg_ParseTuple(args, "KK|iii", &start, &hops, &as_store, &flush_each, &strict))
        return NULL;
    uint64_t cur = start;
    Py_BEGIN_ALLOW_THREADS;
    cur = chase_cmpxchg_(cur, hops, as_store, flush_each, strict);
    Py_END_ALLOW_THREADS;
    return PyLong_FromUnsignedLongLong(cur);
}

static PyObject *py_chase_nt(PyObject *self, PyObject *args) {
    unsigned long long start, hops;
    if (!PyArg_ParseTuple(args, "KK", &start, &hops))
        return NULL;
    if (!feat_sse41) {
        PyErr_SetString(PyExc_RuntimeError, "sse4.1 unavailable");
        return NULL;
    }
    uint64_t cur = start;
    Py_BEGIN_ALLOW_THREADS;
    cur = chase_nt_(cur, hops);
    Py_END_ALLOW_THREADS;
    return PyLong_FromUnsignedLongLong(cur);
}

static PyObject *py_stream_load(PyObject *self, PyObject *args) {
    unsigned long long addr, nbytes, passes = 1;
    int nontemporal = 0;
    if (!PyArg_ParseTuple(args, "KK|Ki", &addr, &nbytes, &passes, &nontemporal))
        return NULL;
    uint64_t acc = 0;
    Py_BEGIN_ALLOW_THREADS;
    for (unsigned long long p = 0; p < passes; p++) {
        if (nontemporal && feat_sse41)
            acc ^= stream_load_ntk((const uint8_t *)addr, nbytes);
        else if (feat_avx2)
            acc ^= stream_load_avx2((const uint8_t *)addr, nbytes);
        else
            acc ^= stream_load_scalar((const uint8_t *)addr, nbytes);
    }
    Py_END_ALLOW_THREADS;
    return PyLong_FromUnsignedLongLong(acc);
}

static PyObject *py_stream_store(PyObject *self, PyObject *args) {
    unsigned long long addr, nbytes, passes = 1;
    int nontemporal = 0;
    if (!PyArg_ParseTuple(args, "KK|Ki", &addr, &nbytes, &passes, &nontemporal))
        return NULL;
    Py_BEGIN_ALLOW_THREADS;
    for (unsigned long long p = 0; p < passes; p++) {
        if (feat_avx2)
            stream_store_avx2((uint8_t *)addr, nbytes, nontemporal);
        else
            stream_store_scalar((uint8_t *)addr, nbytes);
    }
    Py_END_ALLOW_THREADS;
    Py_RETURN_NONE;
}

static PyObject *py_load_pass(PyObject *self, PyObject *args) {
    unsigned long long addr, nbytes;
    if (!PyArg_ParseTuple(args, "KK", &addr, &nbytes))
        return NULL;
    uint64_t acc;
    Py_BEGIN_ALLOW_THREADS;
    acc = load_pass_((const uint8_t *)addr, nbytes);
    Py_END_ALLOW_THREADS;
    return PyLong_FromUnsignedLongLong(acc);
}

static PyObject *py_dirty_pass(PyObject *self, PyObject *args) {
    unsigned long long addr, nbytes;
    int full_line = 0;
    if (!PyArg_ParseTuple(args, "KK|i", &addr, &nbytes, &full_line))
        return NULL;
    Py_BEGIN_ALLOW_THREADS;
    dirty_pass_((uint8_t *)addr, nbytes, full_line);
    Py_END_ALLOW_THREADS;
    Py_RETURN_NONE;
}

static PyObject *py_flush_pass(PyObject *self, PyObject *args) {
    unsigned long long addr, nbytes;
    int instr = 0, per_line_fence = 0;
    if (!PyArg_ParseTuple(args, "KKi|i", &addr, &nbytes, &instr, &per_line_fence))
        return NULL;
    if ((instr == 1 && !feat_clflushopt) || (instr == 2 && !feat_clwb)) {
        PyErr_SetString(PyExc_RuntimeError, "flush instruction unsupported");
        return NULL;
    }
    uint64_t cycles;
    Py_BEGIN_ALLOW_THREADS;
    cycles = flush_pass_((const uint8_t *)addr, nbytes, instr, per_line_fence);
    Py_END_ALLOW_THREADS;
    return PyLong_FromUnsignedLongLong(cycles);
}

static PyObject *py_prefetch_samples(PyObject *self, PyObject *args) {
    unsigned long long addrs, out;
    Py_ssize_t n;
    int hint;
    if (!PyArg_ParseTuple(args, "KniK", &addrs, &n, &hint, &out))
        return NULL;
    Py_BEGIN_ALLOW_THREADS;
    prefetch_samples_((const uint64_t *)addrs, n, hint, (uint64_t *)out);
    Py_END_ALLOW_THREADS;
    Py_RETURN_NONE;
}

static PyObject *py_load_after_prefetch_samples(PyObject *self, PyObject *args) {
    unsigned long long addrs, out;
    Py_ssize_t n;
    int hint;
    if (!PyArg_ParseTuple(args, "KniK", &addrs, &n, &hint, &out))
        return NULL;
    Py_BEGIN_ALLOW_THREADS;
    load_after_prefetch_samples_((const uint64_t *)addrs, n, hint, (uint64_t *)out);
    Py_END_ALLOW_THREADS;
    Py_RETURN_NONE;
}

static PyObject *py_load_samples(PyObject *self, PyObject *args) {
    unsigned long long addrs, out;
    Py_ssize_t n;
    int flush_first;
    if (!PyArg_ParseTuple(args, "KniK", &addrs, &n, &flush_first, &out))
        return NULL;
    uint8_t *seen = PyMem_Calloc(n, 1);
    if (!seen)
        return PyErr_NoMemory();
    Py_BEGIN_ALLOW_THREADS;
    load_samples_((const uint64_t *)addrs, n, flush_first, (uint64_t *)out, seen);
    Py_END_ALLOW_THREADS;
    PyMem_Free(seen);
    Py_RETURN_NONE;
}

static PyObject *py_flush_reload_samples(PyObject *self, PyObject *args) {
    unsigned long long addrs, out;
    Py_ssize_t n;
    int instr;
    if (!PyArg_ParseTuple(args, "KniK", &addrs, &n, &instr, &out))
        return NULL;
    if ((instr == 1 && !feat_clflushopt) || (instr == 2 && !feat_clwb)) {
        PyErr_SetString(PyExc_RuntimeError, "flush instruction unsupported");
        return NULL;
    }
    uint8_t *seen = PyMem_Calloc(n, 1);
    if (!seen)
        return PyErr_NoMemory();
    Py_BEGIN_ALLOW_THREADS;
    flush_reload_samples_((const uint64_t *)addrs, n, instr, (uint64_t *)out, seen);
    Py_END_ALLOW_THREADS;
    PyMem_Free(seen);
    Py_RETURN_NONE;
}

static PyObject *py_copy_samples(PyObject *self, PyObject *args) {
    unsigned long long dst, src, out;
    unsigned long long size;
    Py_ssize_t n;
    int flush_before;
    if (!PyArg_ParseTuple(args, "KKKniK", &dst, &src, &size, &n, &flush_before, &out))
        return NULL;
    Py_BEGIN_ALLOW_THREADS;
    copy_samples_((uint8_t *)dst, (const uint8_t *)src, size, n, flush_before, (uint64_t *)out);
    Py_END_ALLOW_THREADS;
    Py_RETURN_NONE;
}

static PyObject *py_footprint_probe(PyObject *self, PyObject *args) {
    unsigned long long base, stride, warm;
    Py_ssize_t reps = 7;
    if (!PyArg_ParseTuple(args, "KKK|n", &base, &stride, &warm, &reps))
        return NULL;
    if (reps < 1 || reps > 1024) {
        PyErr_SetString(PyExc_ValueError, "reps out of range");
        return NULL;
    }
    uint64_t scratch[1024];
    uint64_t med;
    Py_BEGIN_ALLOW_THREADS;
    med = footprint_probe_((const uint8_t *)base, stride, warm, scratch, reps);
    Py_END_ALLOW_THREADS;
    return PyLong_FromUnsignedLongLong(med);
}

static PyObject *py_spin_worker(PyObject *self, PyObject *args) {
    unsigned long long lock, data, iters, seed, hold_cycles = 0;
    int flush_each = 1;
    if (!PyArg_ParseTuple(args, "KKKK|Ki", &lock, &data, &iters, &seed, &hold_cycles,
                          &flush_each))
        return NULL;
    uint64_t ops = 0, spins = 0;
    Py_BEGIN_ALLOW_THREADS;
    spin_worker_((volatile uint64_t *)lock, (volatile uint64_t *)data, iters, seed, hold_cycles,
                 flush_each, &ops, &spins);
    Py_END_ALLOW_THREADS;
    return Py_BuildValue("(KK)", (unsigned long long)ops, (unsigned long long)spins);
}

#endif /* TB_X86 */

/* Structure entry points are portable (C11 atomics). */

static PyObject *py_spsc_init(PyObject *self, PyObject *args) {
    unsigned long long base, capacity;
    if (!PyArg_ParseTuple(args, "KK", &base, &capacity))
        return NULL;
    if (capacity < 2) {
        PyErr_SetString(PyExc_ValueError, "capacity must be >= 2");
        return NULL;
    }
    spsc_init_((void *)base, capacity);
    Py_RETURN_NONE;
}

static PyObject *py_spsc_produce(PyObject *self, PyObject *args) {
    unsigned long long base, n, start;
    if (!PyArg_ParseTuple(args, "KKK", &base, &n, &start))
        return NULL;
    uint64_t waits;
    Py_BEGIN_ALLOW_THREADS;
    waits = spsc_produce_((void *)base, n, start);
    Py_END_ALLOW_THREADS;
    return PyLong_FromUnsignedLongLong(waits);
}

static PyObject *py_spsc_consume(PyObject *self, PyObject *args) {
    unsigned long long base, n, expected_start, out = 0;
    if (!PyArg_ParseTuple(args, "KKK|K", &base, &n, &expected_start, &out))
        return NULL;
    uint64_t violations, checksum;
    Py_BEGIN_ALLOW_THREADS;
    spsc_consume_((void *)base, n, expected_start, out ? (uint64_t *)out : NULL, &violations,
                  &checksum);
    Py_END_ALLOW_THREADS;
    return Py_BuildValue("(KK)", (unsigned long long)violations, (unsigned long long)checksum);
}

static PyObject *py_mpmc_init(PyObject *self, PyObject *args) {
    unsigned long long base, pool_cap;
    if (!PyArg_ParseTuple(args, "KK", &base, &pool_cap))
        return NULL;
    if (pool_cap < 2 || pool_cap >= 0xffffffffULL) {
        PyErr_SetString(PyExc_ValueError, "pool capacity out of range");
        return NULL;
    }
    mpmc_init_((void *)base, pool_cap);
    Py_RETURN_NONE;
}

static PyObject *py_mpmc_enqueue(PyObject *self, PyObject *args) {
    unsigned long long base, n, start;
    if (!PyArg_ParseTuple(args, "KKK", &base, &n, &start))
        return NULL;
    uint64_t waits;
    Py_BEGIN_ALLOW_THREADS;
    waits = mpmc_enqueue_n_((void *)base, n, start);
    Py_END_ALLOW_THREADS;
    return PyLong_FromUnsignedLongLong(waits);
}

static PyObject *py_mpmc_dequeue(PyObject *self, PyObject *args) {
    unsigned long long base, n, out = 0;
    if (!PyArg_ParseTuple(args, "KK|K", &base, &n, &out))
        return NULL;
    uint64_t count, checksum;
    Py_BEGIN_ALLOW_THREADS;
    mpmc_dequeue_n_((void *)base, n, out ? (uint64_t *)out : NULL, &count, &checksum);
    Py_END_ALLOW_THREADS;
    return Py_BuildValue("(KK)", (unsigned long long)count, (unsigned long long)checksum);
}

static PyObject *py_map_init(PyObject *self, PyObject *args) {
    unsigned long long base, slot_count;
    if (!PyArg_ParseTuple(args, "KK", &base, &slot_count))
        return NULL;
    if (slot_count == 0 || (slot_count & (slot_count - 1))) {
        PyErr_SetString(PyExc_ValueError, "slot count must be a power of two");
        return NULL;
    }
    Py_BEGIN_ALLOW_THREADS;
    map_init_((void *)base, slot_count);
    Py_END_ALLOW_THREADS;
    Py_RETURN_NONE;
}

static PyObject *py_map_populate(PyObject *self, PyObject *args) {
    unsigned long long base, n_keys;
    if (!PyArg_ParseTuple(args, "KK", &base, &n_keys))
        return NULL;
    uint64_t failed;
    Py_BEGIN_ALLOW_THREADS;
    failed = map_populate_((void *)base, n_keys);
    Py_END_ALLOW_THREADS;
    return PyLong_FromUnsignedLongLong(failed);
}

static PyObject *py_map_update_worker(PyObject *self, PyObject *args) {
    unsigned long long base, n_ops, n_keys, seed, last_out = 0;
    int check_ryw = 0;
    if (!PyArg_ParseTuple(args, "KKKK|iK", &base, &n_ops, &n_keys, &seed, &check_ryw, &last_out))
        return NULL;
    uint64_t violations;
    Py_BEGIN_ALLOW_THREADS;
    map_update_worker_((void *)base, n_ops, n_keys, seed, check_ryw,
                       last_out ? (uint64_t *)last_out : NULL, &violations);
    Py_END_ALLOW_THREADS;
    return PyLong_FromUnsignedLongLong(violations);
}

static PyObject *py_map_get_worker(PyObject *self, PyObject *args) {
    unsigned long long base, n_ops, n_keys, seed;
    if (!PyArg_ParseTuple(args, "KKKK", &base, &n_ops, &n_keys, &seed))
        return NULL;
    uint64_t violations, checksum;
    Py_BEGIN_ALLOW_THREADS;
    map_get_worker_((void *)base, n_ops, n_keys, seed, &violations, &checksum);
    Py_END_ALLOW_THREADS;
    return Py_BuildValue("(KK)", (unsigned long long)violations, (unsigned long long)checksum);
}

static PyObject *py_map_final_check(PyObject *self, PyObject *args) {
    unsigned long long base, n_keys, last_addr;
    if (!PyArg_ParseTuple(args, "KKK", &base, &n_keys, &last_addr))
        return NULL;
    uint64_t mismatches;
    Py_BEGIN_ALLOW_THREADS;
    mismatches = map_final_check_((void *)base, n_keys, (const uint64_t *)last_addr);
    Py_END_ALLOW_THREADS;
    return PyLong_FromUnsignedLongLong(mismatches);
}

static PyMethodDef methods[] = {
    {"features", py_features, METH_NOARGS, "CPU feature flags"},
    {"cache_info", py_cache_info, METH_NOARGS, "CPUID cache hierarchy"},
#if TB_X86
    {"tsc", py_tsc, METH_VARARGS, "serialized cycle counter read"},
    {"tsc_overhead", py_tsc_overhead, METH_VARARGS, "median back-to-back read cost"},
    {"chase", py_chase, METH_VARARGS, "dependent pointer chase"},
    {"chase_store", py_chase_store, METH_VARARGS, "chase with dependent store per hop"},
    {"chase_cmpxchg", py_chase_cmpxchg, METH_VARARGS, "chase with lock cmpxchg per hop"},
    {"chase_nt", py_chase_nt, METH_VARARGS, "chase with non-temporal loads"},
    {"stream_load", py_stream_load, METH_VARARGS, "streaming read of a buffer"},
    {"stream_store", py_stream_store, METH_VARARGS, "streaming write of a buffer"},
    {"load_pass", py_load_pass, METH_VARARGS, "touch every line read-only"},
    {"dirty_pass", py_dirty_pass, METH_VARARGS, "dirty every line"},
    {"flush_pass", py_flush_pass, METH_VARARGS, "timed flush of every line"},
    {"prefetch_samples", py_prefetch_samples, METH_VARARGS, "per-sample prefetch timing"},
    {"load_after_prefetch_samples", py_load_after_prefetch_samples, METH_VARARGS,
     "per-sample load-after-prefetch timing"},
    {"load_samples", py_load_samples, METH_VARARGS, "per-sample single-load timing"},
    {"flush_reload_samples", py_flush_reload_samples, METH_VARARGS,
     "per-line dirty+flush+timed-reload"},
    {"copy_samples", py_copy_samples, METH_VARARGS, "per-sample memcpy timing"},
    {"footprint_probe", py_footprint_probe, METH_VARARGS, "next-block latency after warmup"},
    {"spin_worker", py_spin_worker, METH_VARARGS, "spinlock contention loop"},
#endif
    {"spsc_init", py_spsc_init, METH_VARARGS, "initialise SPSC ring in a region"},
    {"spsc_produce", py_spsc_produce, METH_VARARGS, "enqueue n sequential values"},
    {"spsc_consume", py_spsc_consume, METH_VARARGS, "dequeue n values, FIFO-checked"},
    {"mpmc_init", py_mpmc_init, METH_VARARGS, "initialise MPMC queue in a region"},
    {"mpmc_enqueue", py_mpmc_enqueue, METH_VARARGS, "enqueue n values"},
    {"mpmc_dequeue", py_mpmc_dequeue, METH_VARARGS, "dequeue n values"},
    {"map_init", py_map_init, METH_VARARGS, "initialise open-addressing map"},
    {"map_populate", py_map_populate, METH_VARARGS, "insert keys 1..n"},
    {"map_update_worker", py_map_update_worker, METH_VARARGS, "random update loop"},
    {"map_get_worker", py_map_get_worker, METH_VARARGS, "random get loop"},
    {"map_final_check", py_map_final_check, METH_VARARGS, "verify last writes visible"},
    {NULL, NULL, 0, NULL},
};

static struct PyModuleDef moduledef = {
    PyModuleDef_HEAD_INIT, "_kernels", NULL, -1, methods, NULL, NULL, NULL, NULL,
};

PyMODINIT_FUNC PyInit__kernels(void) {
    detect_features();
    return PyModule_Create(&moduledef);
}

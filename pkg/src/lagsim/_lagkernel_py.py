"""Pure-Python lag-2 / deletion-1 run loop (fallback for the compiled kernel).

Same signature and semantics as ``_lagkernel.run_stream``.
"""

import numpy as np

OK = 0
NO_RULE = 1
TOO_SHORT = 2


def run_stream(keys, rhs, rhs_len, n_symbols, stream, start, length, max_steps, lengths):
    """Advance the queue held in ``stream[start:start+length]``.

    ``keys`` is the sorted array of ``s1 * n_symbols + s2`` rule keys with
    matching rows of ``rhs`` / ``rhs_len``.  Outputs are appended in place;
    ``lengths[k]`` receives the string length after step k+1.  Returns
    ``(steps_done, length, code)`` where code is OK when the budget ran out.
    """
    table = {
        int(k): tuple(int(x) for x in rhs[i, : int(rhs_len[i])])
        for i, k in enumerate(keys.tolist())
    }
    buf = stream.tolist()
    end = start + length
    pos = start
    done = 0
    code = OK
    out_lengths = []
    while done < max_steps:
        if end - pos < 2:
            code = TOO_SHORT
            break
        out = table.get(buf[pos] * n_symbols + buf[pos + 1])
        if out is None:
            code = NO_RULE
            break
        buf[end:end + len(out)] = out
        end += len(out)
        pos += 1
        done += 1
        out_lengths.append(end - pos)
    stream[start:end] = np.asarray(buf[start:end], dtype=stream.dtype)
    if done:
        lengths[:done] = out_lengths
    return done, end - pos, code

# cython: language_level=3
# Compiled build of the fused iteration loop; the source lives in _loop.py.
include "_loop.py"

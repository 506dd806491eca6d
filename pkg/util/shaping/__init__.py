"""Zero-dynamics shaping of the five-joint closed chain.

Modules are layered bottom-up: mechanism -> dynamics -> spring/reference ->
zerodyn -> optimize/sim. The command-line pipeline lives in util/zdshape.py.
"""

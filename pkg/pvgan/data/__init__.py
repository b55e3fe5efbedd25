# pvgan.data — ModelNet-style class loading, pairing modes, batching and synthetic objects

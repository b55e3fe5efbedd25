# pvgan.metrics — AAD / AVAR pair-consistency metrics and reports

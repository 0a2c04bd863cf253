# Simulation library: atomic model, pumping, spectra, propagation, theory, pipeline

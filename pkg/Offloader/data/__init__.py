"""Score streams, trace files and output directories"""

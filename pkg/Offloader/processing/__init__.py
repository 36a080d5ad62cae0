"""Offloading policies, simulation and reporting"""

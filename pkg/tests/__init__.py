"""Test suite for dsmtsim"""

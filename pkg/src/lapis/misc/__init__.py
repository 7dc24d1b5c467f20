"""Support modules are hidden here to avoid polluting the API"""

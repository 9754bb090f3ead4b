# App package
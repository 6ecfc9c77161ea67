from django.contrib import admin
from django.urls import path

# Training is driven by `manage.py kpg`; the web surface is the run registry only.
urlpatterns = [
    path('admin/', admin.site.urls),
]
